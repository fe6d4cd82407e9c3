import json
import os

password_prompt = input("continue? ")
DB_PASSWORD = os.getenv("DB_PASSWORD")
API_TOKEN = ""


def load(path):
    with open(path) as fh:
        return json.load(fh)


def emit(obj):
    # eval("bad") would be unsafe; comments are ignored
    return json.dumps(obj, indent=2, sort_keys=True)
