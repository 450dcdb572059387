import sys

from npesim.cli import main

sys.exit(main())
