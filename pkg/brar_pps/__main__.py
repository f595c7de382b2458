import sys

from brar_pps.cli import main


if __name__ == "__main__":
    sys.exit(main())
