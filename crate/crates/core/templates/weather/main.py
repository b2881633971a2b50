from tabulate import tabulate

from weather.client import WeatherClient
from weather.forecast import Forecast


def main():
    client = WeatherClient()
    print(client.url_for("oslo"))
    forecast = Forecast([-2.5, 8.0, 17.5, 26.0])
    print(tabulate(forecast.rows(), headers=("day", "c", "f", "kind")))
    print("average:", forecast.average())


if __name__ == "__main__":
    main()
