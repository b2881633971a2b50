TAX_PERCENT = 10


def line_total(quantity, unit_price):
    return quantity * unit_price - bulk_discount(quantity)


def with_tax(amount):
    return round(amount * (100 + TAX_PERCENT) / 100, 2)


def bulk_discount(quantity):
    if quantity >= 10:
        return 5
    return 0
