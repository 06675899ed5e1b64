import sys

from jasf.cli import main

sys.exit(main())
