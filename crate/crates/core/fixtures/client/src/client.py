import requests


class APIClient:
    def __init__(self, base_url):
        self.base_url = base_url.rstrip("/")
        self.session = requests.Session()

    def endpoint(self, path):
        return self.base_url + "/" + path.lstrip("/")

    def describe(self):
        return "APIClient(" + self.endpoint("status") + ")"
