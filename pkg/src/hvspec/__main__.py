"""
Entrypoint module, in case you use `python -mhvspec`.
"""
from hvspec.cli import main

if __name__ == "__main__":
    main()
