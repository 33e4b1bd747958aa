from gffcoupling.harness.cli import main

raise SystemExit(main())
