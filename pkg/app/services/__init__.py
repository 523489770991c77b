"""Domain services: maps, reward learning, forecasting, the lighting pipeline and the lamp link."""
