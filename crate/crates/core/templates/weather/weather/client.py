import requests

BASE_URL = "https://weather.example.com/api"


class WeatherClient:
    def __init__(self, base_url=BASE_URL):
        self.base_url = base_url
        self.session = requests.Session()

    def url_for(self, city, days=3):
        return self.base_url + "/forecast?city=" + city + "&days=" + str(days)
