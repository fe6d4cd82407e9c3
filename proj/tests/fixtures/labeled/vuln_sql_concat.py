import sqlite3


def find_user(conn, username):
    cursor = conn.cursor()
    query = "SELECT id, email FROM users WHERE name = '" + username + "'"
    cursor.execute(query)
    return cursor.fetchone()
