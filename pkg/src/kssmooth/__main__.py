import sys

from kssmooth.cli import main

sys.exit(main())
