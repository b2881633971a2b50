from inventory.report import render_table
from inventory.store import Store


def main():
    store = Store()
    store.add("apple", 3, 0.5)
    store.add("pear", 12, 0.75)
    store.add("plum", 1, 1.25)
    print(render_table(store))
    print("low stock:", ", ".join(store.low_stock(2)))


if __name__ == "__main__":
    main()
