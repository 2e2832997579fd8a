import sys

from toxispan.cli import main

if __name__ == "__main__":
    sys.exit(main())
