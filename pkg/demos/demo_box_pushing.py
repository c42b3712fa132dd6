"""The box-pushing grid world, rendered step by step.

Two agents see only the cell in front of them.  Small boxes move under one
agent; the big box needs both agents pushing side by side.  This script
replays the scripted cooperative push that earns the +100 terminal reward.
"""

from factormix.envs import FORWARD, STAY, TURN_LEFT, TURN_RIGHT, BoxPushing


def render(env):
    g = env.config.grid_size
    grid = [["." for _ in range(g)] for _ in range(g)]
    for c in range(g):
        grid[0][c] = "="  # goal row
    for r, c in env.small_boxes:
        grid[r][c] = "b"
    (r, c), (r2, c2) = env._big_cells()
    grid[r][c] = grid[r2][c2] = "B"
    arrows = "^>v<"
    for i, (r, c) in enumerate(env.agent_pos):
        grid[r][c] = arrows[env.agent_dir[i]]
    return "\n".join(" ".join(row) for row in grid)


env = BoxPushing(grid_size=8, horizon=40)
env.reset(0)
print("initial layout (goal row on top, ^ are the agents):")
print(render(env))

left = [FORWARD, FORWARD, TURN_RIGHT, FORWARD, TURN_LEFT, STAY] + [FORWARD] * 4
right = [FORWARD, FORWARD, TURN_LEFT, FORWARD, FORWARD, TURN_RIGHT] + [FORWARD] * 4

total = 0.0
for t, joint in enumerate(zip(left, right)):
    result = env.step(joint)
    total += result.reward
    print(f"\nstep {t}: actions={joint} reward={result.reward:+.0f} "
          f"front cells={[list(map(int, o)) for o in result.observations]}")
    print(render(env))
    if result.terminal:
        break

print(f"\nepisode return: {total:+.0f}")
