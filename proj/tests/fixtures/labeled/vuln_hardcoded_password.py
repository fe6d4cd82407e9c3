import sqlite3

DB_PASSWORD = "hunter2"
db_user = "admin"


def connect():
    conn = sqlite3.connect("app.db")
    conn.execute("PRAGMA key = ?", (DB_PASSWORD,))
    return conn
