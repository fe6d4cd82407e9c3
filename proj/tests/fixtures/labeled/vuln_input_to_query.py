import sqlite3
from flask import Flask, request

app = Flask(__name__)


@app.route("/item")
def item():
    item_id = request.args.get("id")
    conn = sqlite3.connect("items.db")
    row = conn.execute("SELECT * FROM items WHERE id = ?", (item_id,)).fetchone()
    return str(row)


@app.route("/safe")
def safe_item():
    item_id = validate_id(request.args.get("id"))
    conn = sqlite3.connect("items.db")
    return str(conn.execute("SELECT * FROM items WHERE id = ?", (item_id,)).fetchone())
