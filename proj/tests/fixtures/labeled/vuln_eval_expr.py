def calculate(expression):
    """Evaluate an arithmetic expression typed by the user."""
    value = eval(expression)
    return value


print(calculate("2 + 2"))
