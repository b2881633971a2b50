from tabulate import tabulate

from inventory.pricing import with_tax


def render_table(store):
    rows = []
    for name, (quantity, price) in sorted(store.items.items()):
        rows.append((name, quantity, with_tax(quantity * price)))
    return tabulate(rows, headers=("item", "qty", "gross"))
