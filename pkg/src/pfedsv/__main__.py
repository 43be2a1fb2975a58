import sys

from pfedsv.cli import main

sys.exit(main())
