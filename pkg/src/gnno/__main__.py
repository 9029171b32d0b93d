import sys

from gnno.cli import main

sys.exit(main())
