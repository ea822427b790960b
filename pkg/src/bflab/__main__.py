import sys

from bflab.cli import main

sys.exit(main())
