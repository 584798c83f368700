import sys

from fgrn.cli import main

sys.exit(main())
