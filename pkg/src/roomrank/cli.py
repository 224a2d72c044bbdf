"""Unified CLI for roomrank.

Entry point: `roomrank` command (installed via pip install roomrank).

Subcommands:
    roomrank gen-corpus ...  Synthetic impulse-response corpus
    roomrank train ...       Train the perceptual scorer
    roomrank evaluate ...    Scorer loss/accuracy on rated notes
    roomrank score ...       Score one note
    roomrank enhance ...     Best room for one note
    roomrank stats ...       Improvement histograms over many notes
    roomrank config check    Resolved settings and library versions

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

import sys

USAGE_ERROR = 2


def main():
    if len(sys.argv) < 2:
        _print_usage(sys.stderr)
        sys.exit(USAGE_ERROR)

    command = sys.argv[1]
    rest = sys.argv[2:]

    if command in ("-h", "--help", "help"):
        _print_usage(sys.stdout)
        return

    if command == "--version":
        from roomrank import __version__
        print(f"roomrank {__version__}")
        return

    if command == "gen-corpus":
        from roomrank.rir.corpus import cli_main
        cli_main(rest)
    elif command in ("train", "evaluate"):
        from roomrank.scorer.training import cli_main
        cli_main([command] + rest)
    elif command in ("score", "enhance", "stats"):
        from roomrank.ranker import cli_main
        cli_main([command] + rest)
    elif command == "config":
        _dispatch_config(rest)
    else:
        print(f"Unknown command: {command}", file=sys.stderr)
        _print_usage(sys.stderr)
        sys.exit(USAGE_ERROR)


def _dispatch_config(args):
    import json
    from roomrank.config import check_setup

    if args and args[0] in ("-h", "--help"):
        print("Usage: roomrank config check")
        return

    command = args[0] if args else "check"

    if command == "check":
        status = check_setup()
        print(json.dumps({"ok": True, "status": status}, indent=2))
    else:
        print(f"Unknown config command: {command}", file=sys.stderr)
        sys.exit(USAGE_ERROR)


def _print_usage(stream):
    print("""Usage: roomrank <command> [args...]

Commands:
  gen-corpus ...      Generate a seeded corpus of room impulse responses
  train ...           Train the perceptual note scorer
  evaluate ...        Loss and accuracy of a scorer on rated notes
  score ...           Score one note (prints a 4-decimal score)
  enhance ...         Find the best room for a note and write the enhanced audio
  stats ...           Enhance low-scoring notes and write improvement histograms
  config check        Show resolved settings and library versions

Options:
  --help              Show this help message
  --version           Show version

Run 'roomrank <command> --help' for command-specific help.""", file=stream)
