from django.apps import AppConfig


class SocialFusionConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'socialfusion'
    verbose_name = 'SocialFusion'
