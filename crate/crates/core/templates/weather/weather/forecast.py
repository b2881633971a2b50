from weather.convert import celsius_to_fahrenheit


def classify(celsius):
    if celsius < 0:
        return "freezing"
    if celsius <= 15:
        return "cold"
    if celsius < 25:
        return "mild"
    return "hot"


class Forecast:
    def __init__(self, readings):
        self.readings = list(readings)

    def average(self):
        if len(self.readings) == 0:
            return 0.0
        return sum(self.readings) / len(self.readings)

    def rows(self):
        rows = []
        for index, celsius in enumerate(self.readings):
            rows.append((index + 1, celsius, celsius_to_fahrenheit(celsius), classify(celsius)))
        return rows
