"""Install requirement-list declarations from a local package store.

Usage: offline_install.py STORE TARGET ROOT

Each declared distribution is looked up as STORE/<normalized name>/ and its
contents are copied into TARGET. Unknown distributions fail with the same
two-line report pip prints for unsatisfiable requirements.
"""

import os
import re
import shutil
import sys

NAME = re.compile(r"^\s*([A-Za-z0-9][A-Za-z0-9._-]*)")


def normalize(name):
    return re.sub(r"[-_.]+", "-", name).lower()


def requirements(root):
    path = os.path.join(root, "requirements.txt")
    if not os.path.exists(path):
        return []
    names = []
    with open(path, encoding="utf-8") as handle:
        for raw in handle:
            line = raw.split("#", 1)[0].strip()
            if not line or line.startswith("-"):
                continue
            match = NAME.match(line)
            if match is None:
                print("ERROR: Invalid requirement: '%s'" % line, file=sys.stderr)
                sys.exit(1)
            names.append((match.group(1), line))
    return names


def main(argv):
    if len(argv) != 4:
        print(__doc__.strip(), file=sys.stderr)
        return 2
    store, target, root = argv[1], argv[2], argv[3]
    os.makedirs(target, exist_ok=True)
    installed = []
    for name, spec in requirements(root):
        source = os.path.join(store, normalize(name))
        if not os.path.isdir(source):
            print(
                "ERROR: Could not find a version that satisfies the requirement %s (from versions: none)" % spec,
                file=sys.stderr,
            )
            print("ERROR: No matching distribution found for %s" % name, file=sys.stderr)
            return 1
        for entry in sorted(os.listdir(source)):
            src = os.path.join(source, entry)
            dst = os.path.join(target, entry)
            if os.path.isdir(src):
                shutil.copytree(src, dst, dirs_exist_ok=True)
            else:
                shutil.copy2(src, dst)
        installed.append(normalize(name))
    if installed:
        print("Successfully installed " + " ".join(installed))
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
