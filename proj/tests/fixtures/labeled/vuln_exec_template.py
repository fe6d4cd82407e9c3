def make_handler(name, body):
    source = "def " + name + "(event):\n    " + body
    namespace = {}
    exec(source, namespace)
    return namespace[name]
