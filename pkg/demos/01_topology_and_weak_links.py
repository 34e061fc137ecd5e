"""Build a metro access network and find its single points of failure.

The topology generator produces the three-tier layout these networks use in
practice: a ring of core routers, aggregation switches multi-homed into the
core, and base stations that each hang off a single aggregation uplink.
"""

from netdiag.topology import TopologySpec, find_weak_links, generate_man_topology, validate

# 1. Describe the network size and wiring randomness, then generate it.
#    The same spec + seed always yields the same graph.
spec = TopologySpec(n_core=3, n_agg=4, n_bs=8, cross_link_prob=0.2, seed=3)
g = generate_man_topology(spec)

print(f"devices: {len(g.devices)}, links: {len(g.links)}")
for kind in ("CoreRouter", "AggSwitch", "BaseStation"):
    ids = [d.id for d in g.devices if d.kind.value == kind]
    print(f"  {kind:<12} {ids}")

# 2. The generator's output always satisfies the structural contract:
#    no duplicates, no self-loops, fully connected.
problems = validate(g)
print(f"\nvalidation problems: {problems or 'none'}")

# 3. A weak link is one whose loss splits the network. Base-station uplinks
#    are always weak (each station has exactly one), while the core ring and
#    any cross links provide redundancy higher up.
weak = find_weak_links(g)
kind_of = {d.id: d.kind.value for d in g.devices}
print(f"\n{len(weak)} weak links (removal disconnects the network):")
for u, v in sorted(weak):
    print(f"  {u} ({kind_of[u]}) -- {v} ({kind_of[v]})")

bs_uplinks = {link for link in weak if "BaseStation" in (kind_of[link[0]], kind_of[link[1]])}
print(f"\n{len(bs_uplinks)} of these are base-station uplinks — the expected fragile edge of the tree.")
