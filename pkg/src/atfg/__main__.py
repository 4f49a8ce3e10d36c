import sys

from atfg.cli import main

sys.exit(main())
