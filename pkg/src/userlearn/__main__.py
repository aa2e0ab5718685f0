import sys

from userlearn.cli import main

sys.exit(main())
