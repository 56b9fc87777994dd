"""``python -m htlcsim``: the ``htlcsim`` console command."""

from htlcsim.cli import main

if __name__ == "__main__":
    main()
