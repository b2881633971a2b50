def celsius_to_fahrenheit(celsius):
    return celsius * 9 / 5 + 32


def kmh_to_ms(speed):
    return round(speed * 1000 / 3600, 1)
