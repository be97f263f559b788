import sys

from spin_qst.cli import main

if __name__ == "__main__":
    sys.exit(main())
