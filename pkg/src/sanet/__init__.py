"""Infrared small-target detection network and its numpy training stack."""
