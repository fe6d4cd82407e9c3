import requests


def download(url):
    resp = requests.get(url, timeout=5, retries=3)
    resp.raise_for_status()
    return resp.content
