import os

result = eval("1 + 2")
os.system("uptime")
query = "SELECT 1"
