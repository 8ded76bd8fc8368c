"""Small layered products/sales application used to exercise the runtime.

The app owns the product catalogue and renders a plain text listing.  It
knows nothing about sales totals: those arrive only when a pipeline unit
bound to the render/compute/read extension points is dropped into the host.
"""

from __future__ import annotations

import ast
import hashlib
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Any, Sequence

from ..chain import ErrorPolicy
from ..host import Host, HostConfig

FIXTURES_DIR = Path(__file__).parent / "fixtures"
GOLDEN_DIR = Path(__file__).parent / "golden"

RENDER_EP = "ui.product.render"
COMPUTE_EP = "business.sales.compute"
READ_EP = "data.sales.read"
EXTENSION_POINTS = (READ_EP, COMPUTE_EP, RENDER_EP)


class FixtureError(ValueError):
    pass


@dataclass(frozen=True)
class ProductRecord:
    id: str
    name: str
    price: Decimal

    def __post_init__(self):
        if self.price < 0:
            raise FixtureError(f"product {self.id}: price must be >= 0")


@dataclass(frozen=True)
class SaleRecord:
    product_id: str
    quantity: int
    date: str

    def __post_init__(self):
        if self.quantity < 0:
            raise FixtureError(f"sale of {self.product_id}: quantity must be >= 0")


def load_products(path: Path) -> list[ProductRecord]:
    import csv

    products: list[ProductRecord] = []
    seen: set[str] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            pid = row["id"].strip()
            if pid in seen:
                raise FixtureError(f"duplicate product id {pid!r}")
            seen.add(pid)
            try:
                price = Decimal(row["price"].strip())
            except InvalidOperation:
                raise FixtureError(f"product {pid}: bad price {row['price']!r}") from None
            products.append(ProductRecord(id=pid, name=row["name"].strip(), price=price))
    return products


def load_sales(path: Path, products: Sequence[ProductRecord]) -> list[SaleRecord]:
    import csv

    known = {p.id for p in products}
    sales: list[SaleRecord] = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            record = SaleRecord(
                product_id=row["product_id"].strip(),
                quantity=int(row["quantity"]),
                date=row["date"].strip(),
            )
            if record.product_id not in known:
                raise FixtureError(f"sale references unknown product {record.product_id!r}")
            sales.append(record)
    return sales


def render_table(columns: Sequence[str], rows: Sequence[dict[str, Any]]) -> str:
    table = [list(columns)]
    for row in rows:
        table.append([str(row.get(col, "")) for col in columns])
    widths = [max(len(line[i]) for line in table) for i in range(len(columns))]
    lines = [
        "  ".join(cell.ljust(width) for cell, width in zip(line, widths)).rstrip()
        for line in table
    ]
    return "\n".join(lines) + "\n"


class DemoApp:
    """Legacy app facade: dispatches its render flow through the host."""

    def __init__(self, host: Host, fixtures_dir: Path | None = None):
        self.host = host
        self.fixtures_dir = Path(fixtures_dir) if fixtures_dir else FIXTURES_DIR
        self.products = load_products(self.fixtures_dir / "products.csv")

    def render(self) -> str:
        """Render the product listing, letting any active units enrich it."""
        payload: dict[str, Any] = {
            "fixtures_dir": str(self.fixtures_dir),
            "columns": ["id", "name", "price"],
            "products": [
                {"id": p.id, "name": p.name, "price": str(p.price)} for p in self.products
            ],
        }
        for extension_point in EXTENSION_POINTS:
            payload = self.host.dispatch(extension_point, payload)
        return render_table(payload["columns"], payload["products"])


def start_demo(
    drop_dir: Path,
    fixtures_dir: Path | None = None,
    *,
    scan_interval_ms: int = 200,
    diagnostics=None,
) -> DemoApp:
    """Start a host over the drop dir and wrap it in the demo app.

    The demo runs fail-open so an optional enrichment that breaks never
    takes the baseline listing down with it.
    """
    host = Host(
        HostConfig(
            drop_dir=Path(drop_dir),
            scan_interval_ms=scan_interval_ms,
            error_policy=ErrorPolicy.FAIL_OPEN,
            diagnostics=diagnostics,
        )
    )
    host.start()
    return DemoApp(host, fixtures_dir)


# -- self-containment check ---------------------------------------------------

def _module_file(package_root: Path, parts: Sequence[str]) -> Path | None:
    if not parts:
        candidate = package_root / "__init__.py"
        return candidate if candidate.is_file() else None
    base = package_root.joinpath(*parts)
    if base.with_suffix(".py").is_file():
        return base.with_suffix(".py")
    if (base / "__init__.py").is_file():
        return base / "__init__.py"
    return None


def _internal_imports(path: Path, package_root: Path, package_name: str) -> set[Path]:
    """Package-internal module files imported by one source file."""
    rel = path.relative_to(package_root)
    if rel.name == "__init__.py":
        module_parts = list(rel.parent.parts)
    else:
        module_parts = list(rel.parent.parts) + [rel.stem]
    tree = ast.parse(path.read_text(encoding="utf-8"))
    found: set[Path] = set()

    def add(parts: Sequence[str]) -> None:
        target = _module_file(package_root, parts)
        if target is not None:
            found.add(target)

    for node in ast.walk(tree):
        if isinstance(node, ast.Import):
            for alias in node.names:
                name = alias.name
                if name == package_name or name.startswith(package_name + "."):
                    add(name.split(".")[1:])
        elif isinstance(node, ast.ImportFrom):
            if node.level == 0:
                if node.module and (
                    node.module == package_name or node.module.startswith(package_name + ".")
                ):
                    base = node.module.split(".")[1:]
                    add(base)
                    for alias in node.names:
                        add(base + [alias.name])
            else:
                prefix = module_parts[: len(module_parts) - node.level]
                base = prefix + (node.module.split(".") if node.module else [])
                add(base)
                for alias in node.names:
                    add(base + [alias.name])
    return found


def build_demo_artifact(package_root: Path | None = None) -> str:
    """Hash of the demo app build: the app module plus every package module
    it (transitively) imports.  Sample unit sources are not imported by the
    app, so adding or removing them cannot change this hash."""
    if package_root is None:
        package_root = Path(__file__).resolve().parent.parent
    package_root = Path(package_root)
    package_name = package_root.name
    entry = package_root / "demo" / "app.py"
    reachable: set[Path] = set()
    frontier = [entry.resolve()]
    while frontier:
        current = frontier.pop()
        if current in reachable:
            continue
        reachable.add(current)
        for target in _internal_imports(current, package_root, package_name):
            frontier.append(target.resolve())
    digest = hashlib.sha256()
    for path in sorted(reachable):
        digest.update(str(path.relative_to(package_root)).encode())
        digest.update(b"\0")
        digest.update(path.read_bytes())
        digest.update(b"\0")
    return digest.hexdigest()
