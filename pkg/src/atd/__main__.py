import sys

from atd.cli import main

sys.exit(main())
