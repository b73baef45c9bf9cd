import sys

from resil.app import main

sys.exit(main())
