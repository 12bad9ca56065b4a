import sys

from mfgasym.cli import main

sys.exit(main())
