#!/usr/bin/env python3
"""Regenerate prompts/manifest.json from the template files.

Slot syntax: {name} is a slot; {{ and }} are literal braces.
"""
import hashlib
import json
import pathlib
import re
import sys

SLOT = re.compile(r"[A-Za-z_][A-Za-z0-9_.]*")


def slots(body: str) -> list[str]:
    found, i = set(), 0
    while i < len(body):
        c = body[i]
        if c == "{":
            if body[i + 1 : i + 2] == "{":
                i += 2
                continue
            j = body.index("}", i)
            name = body[i + 1 : j]
            if not SLOT.fullmatch(name):
                raise SystemExit(f"bad slot {name!r}")
            found.add(name)
            i = j + 1
        elif c == "}":
            if body[i + 1 : i + 2] != "}":
                raise SystemExit("stray closing brace")
            i += 2
        else:
            i += 1
    return sorted(found)


def main() -> None:
    root = pathlib.Path(sys.argv[1] if len(sys.argv) > 1 else "prompts")
    manifest_path = root / "manifest.json"
    manifest = json.loads(manifest_path.read_text())
    for entry in manifest["templates"]:
        data = (root / entry["file"]).read_bytes()
        entry["sha256"] = hashlib.sha256(data).hexdigest()
        entry["required_slots"] = slots(data.decode())
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")


if __name__ == "__main__":
    main()
