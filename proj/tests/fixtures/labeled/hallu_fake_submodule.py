import urllib.parse
import urllib.fetch


def build(base, params):
    return base + "?" + urllib.parse.urlencode(params)
