from inventory.pricing import line_total


class Store:
    def __init__(self):
        self.items = {}

    def add(self, name, quantity, unit_price):
        if quantity < 0:
            raise ValueError("quantity must be non-negative")
        self.items[name] = (quantity, unit_price)

    def count(self):
        return sum(quantity for quantity, _ in self.items.values())

    def low_stock(self, threshold):
        return sorted(name for name, (quantity, _) in self.items.items() if quantity < threshold)

    def value(self):
        return sum(line_total(quantity, price) for quantity, price in self.items.values())
