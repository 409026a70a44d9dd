#!/usr/bin/env python3
"""
Generate a batch of synthetic paper-like objects for desk-scale ingest runs
"""

import argparse
import random
from pathlib import Path

MARC = """<?xml version="1.0" encoding="UTF-8"?>
<record xmlns="http://www.loc.gov/MARC21/slim">
  <controlfield tag="001">SYN{n:08d}</controlfield>
  <controlfield tag="003">SYN</controlfield>
  <datafield tag="100" ind1="1" ind2=" ">
    <subfield code="a">Author {author}.</subfield>
  </datafield>
  <datafield tag="245" ind1="1" ind2="0">
    <subfield code="a">Synthetic paper {n} /</subfield>
  </datafield>
</record>
"""

MANIFEST = """[object]
content_id = info:doi/10.999/{n}
placeholder = {namespace}/pro/paper

[datastream:marc]
path = {stem}.marc.xml
mime_type = text/xml; charset=UTF-8
content_id = info:pmid/9{n:07d}
format = {namespace}/fmt/3
"""

PDF_SECTION = """
[datastream:pdf]
path = {stem}.pdf
mime_type = application/pdf
format = {namespace}/fmt/5
"""


def generate_batch(count, output_dir, namespace="info:lanl-repo", binary_ratio=0.5, seed=0):
    """Write ``count`` manifests with their datastreams; about ``binary_ratio`` of them get a PDF."""
    rng = random.Random(seed)
    output = Path(output_dir)
    output.mkdir(parents=True, exist_ok=True)
    binaries = 0
    for n in range(count):
        stem = f"object-{n:06d}"
        (output / f"{stem}.marc.xml").write_text(
            MARC.format(n=n, author=rng.randint(1, 500)), encoding="utf-8"
        )
        manifest = MANIFEST.format(n=n, namespace=namespace, stem=stem)
        if rng.random() < binary_ratio:
            payload = b"%PDF-1.4\n" + rng.randbytes(rng.randint(256, 4096)) + b"\n%%EOF\n"
            (output / f"{stem}.pdf").write_bytes(payload)
            manifest += PDF_SECTION.format(namespace=namespace, stem=stem)
            binaries += 1
        (output / f"{stem}.ini").write_text(manifest, encoding="utf-8")
    print(f"Wrote {count} manifests ({binaries} with a PDF) to {output}")
    return count


def main(args=None):
    parser = argparse.ArgumentParser(description="Generate a synthetic ingest batch")
    parser.add_argument("count", type=int, help="Number of objects")
    parser.add_argument("output_dir", help="Directory for manifests and datastreams")
    parser.add_argument("--namespace", default="info:lanl-repo", help="Identifier namespace")
    parser.add_argument("--binary-ratio", type=float, default=0.5, help="Share of objects with a PDF")
    parser.add_argument("--seed", type=int, default=0, help="Random seed")
    parsed = parser.parse_args(args)
    generate_batch(parsed.count, parsed.output_dir, parsed.namespace, parsed.binary_ratio, parsed.seed)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
