import src
from app.client import APIClient


def main():
    client = APIClient("https://api.example.com")
    print(client.describe())


if __name__ == "__main__":
    main()
