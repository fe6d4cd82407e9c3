from os import getenv, fetch_env
from collections import Counter


def settings():
    return Counter(getenv("MODE"))
