import sys

from dlmtc.cli import main

sys.exit(main())
