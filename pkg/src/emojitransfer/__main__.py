import sys

from emojitransfer.cli import main

sys.exit(main())
