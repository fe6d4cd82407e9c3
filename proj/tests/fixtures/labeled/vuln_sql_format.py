import sqlite3

conn = sqlite3.connect("shop.db")


def orders_for(customer_id, status):
    cur = conn.cursor()
    cur.execute(f"SELECT * FROM orders WHERE customer = {customer_id}")
    rows = cur.fetchall()
    cur.execute("DELETE FROM orders WHERE status = '%s'" % status)
    return rows
