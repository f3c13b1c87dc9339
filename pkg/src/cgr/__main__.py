from cgr.cli import main

raise SystemExit(main())
