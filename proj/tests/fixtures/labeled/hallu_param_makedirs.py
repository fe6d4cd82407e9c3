import os
import re


def prepare(path, name):
    os.makedirs(path, exist_ok=True, recursive=True)
    return re.sub(r"\s+", "_", name, flags=re.IGNORECASE, limit=2)
