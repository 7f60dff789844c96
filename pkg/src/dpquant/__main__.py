import sys

from dpquant.cli import main

sys.exit(main())
