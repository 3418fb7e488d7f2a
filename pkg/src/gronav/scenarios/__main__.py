from . import write_bundled

for path in write_bundled():
    print(path)
