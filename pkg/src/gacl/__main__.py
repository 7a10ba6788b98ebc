from gacl.cli import main

raise SystemExit(main())
