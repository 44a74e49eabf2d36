from hypothesis import settings

# first calls compile numba kernels, which blows any per-example deadline
settings.register_profile("vrrw", deadline=None)
settings.load_profile("vrrw")
