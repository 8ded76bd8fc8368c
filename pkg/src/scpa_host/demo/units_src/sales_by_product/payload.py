"""Sales-by-product unit: one bundle carrying data, business, and UI
sub-pieces.  Reads the sales rows itself, totals them per product, and
appends a total_sales column to the listing.  Shares nothing with the app
beyond the payload/handler contract.
"""

import csv
from decimal import Decimal
from pathlib import Path


def read_sales(payload, context):
    fixtures_dir = payload.get("fixtures_dir")
    if not isinstance(fixtures_dir, str) or not fixtures_dir:
        raise RuntimeError("payload carries no fixtures_dir")
    path = Path(fixtures_dir) / "sales.csv"
    if not path.is_file():
        raise RuntimeError(f"sales fixture missing: {path}")
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            rows.append(
                {
                    "product_id": row["product_id"].strip(),
                    "quantity": int(row["quantity"]),
                    "date": row["date"].strip(),
                }
            )
    out = dict(payload)
    out["sales"] = rows
    return out


def compute_totals(payload, context):
    sales = payload.get("sales")
    products = payload.get("products")
    if not isinstance(sales, list) or not isinstance(products, list):
        raise RuntimeError("sales rows unavailable; data layer did not run")
    prices = {p["id"]: Decimal(p["price"]) for p in products}
    totals = {}
    for row in sales:
        pid = row["product_id"]
        if pid in prices:
            totals[pid] = totals.get(pid, Decimal("0")) + prices[pid] * row["quantity"]
    out = dict(payload)
    out["sales_totals"] = {pid: str(total) for pid, total in totals.items()}
    return out


def render_sales_column(payload, context):
    totals = payload.get("sales_totals")
    if not isinstance(totals, dict):
        raise RuntimeError("sales totals unavailable; business layer did not run")
    out = dict(payload)
    columns = list(out.get("columns", []))
    if "total_sales" not in columns:
        columns.append("total_sales")
    out["columns"] = columns
    out["products"] = [
        dict(product, total_sales=totals.get(product.get("id"), "0.0"))
        for product in out.get("products", [])
    ]
    return out
