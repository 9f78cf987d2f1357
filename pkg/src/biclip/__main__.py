from biclip.cli import main
import sys

sys.exit(main())
