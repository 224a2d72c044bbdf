"""Allow `python -m roomrank` to invoke the CLI."""
from roomrank.cli import main

main()
