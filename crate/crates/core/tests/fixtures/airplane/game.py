import player


class Airplane:
    def __init__(self, x, y):
        self.x = x
        self.y = y


def make_bullets():
    return []


def start_game():
    """Set up the board and hand control to the player."""
    player_airplane = Airplane(200, 380)
    bullets = make_bullets()
    width = 400
    height = 400
    player_airplane.x = min(player_airplane.x, width)
    player.handle_input(player_airplane, bullets)
