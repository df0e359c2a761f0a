import sys

from src.components.cli import main

if __name__ == "__main__":
    sys.exit(main())
