from pfedhpo.harness.cli import main

main()
