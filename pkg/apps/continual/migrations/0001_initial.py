# Generated by Django 5.1.11 on 2026-10-18 09:12

from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = []

    operations = [
        migrations.CreateModel(
            name='ExperimentRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('run_id', models.CharField(max_length=64)),
                ('config_hash', models.CharField(db_index=True, max_length=16)),
                ('trainer', models.CharField(choices=[('dualls', 'DUAL_LS'), ('vanilla', 'VANILLA'), ('der', 'DER'), ('gss', 'GSS'), ('agem', 'AGEM')], max_length=16)),
                ('seed', models.IntegerField()),
                ('buffer_budget', models.PositiveIntegerField(default=0)),
                ('status', models.CharField(choices=[('completed', 'Completed'), ('failed', 'Failed')], default='completed', max_length=16)),
                ('metric_rows', models.JSONField(blank=True, default=list)),
                ('final_fde_ave', models.FloatField(blank=True, null=True)),
                ('final_mr_ave', models.FloatField(blank=True, null=True)),
                ('final_fde_bwt', models.FloatField(blank=True, null=True)),
                ('final_mr_bwt', models.FloatField(blank=True, null=True)),
                ('wall_time_s', models.FloatField(default=0.0)),
                ('processed_samples', models.PositiveBigIntegerField(default=0)),
                ('gradient_steps', models.PositiveIntegerField(default=0)),
                ('output_dir', models.CharField(blank=True, default='', max_length=512)),
                ('error_message', models.TextField(blank=True, default='')),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('updated_at', models.DateTimeField(auto_now=True)),
            ],
            options={
                'verbose_name': 'Experiment Run',
                'verbose_name_plural': 'Experiment Runs',
                'ordering': ['-created_at'],
            },
        ),
        migrations.AddConstraint(
            model_name='experimentrun',
            constraint=models.UniqueConstraint(fields=('config_hash', 'run_id'), name='uniq_run_per_config'),
        ),
        migrations.AddIndex(
            model_name='experimentrun',
            index=models.Index(fields=['trainer', 'buffer_budget'], name='idx_run_trainer_budget'),
        ),
    ]
