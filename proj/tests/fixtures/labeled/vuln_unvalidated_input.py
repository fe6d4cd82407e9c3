import os

name = input("file to remove: ")
os.remove(name)
target = os.getenv("BACKUP_TARGET")
os.system(target)
